#include "mise/cli.hpp"

int main(int argc, char** argv) { return mise::cli::main(argc, argv); }
