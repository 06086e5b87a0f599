#include "fillup/cli.hpp"

int main(int argc, char** argv) { return fillup::cli::main(argc, argv); }
