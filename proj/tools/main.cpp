#include "mangares/cli.hpp"

int main(int argc, char** argv) { return mr::cli::run(argc, argv); }
