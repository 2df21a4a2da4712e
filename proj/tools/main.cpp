#include "bce/cli/cli.hpp"

int main(int argc, char** argv) { return bce::cli::run(argc, argv); }
