#include "fedsel/cli.hpp"

int main(int argc, char** argv) { return fedsel::cli::main(argc, argv); }
