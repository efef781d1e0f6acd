#include "vsr/cli.hpp"

int main(int argc, char** argv) { return vsr::cli::main(argc, argv); }
