#include <iostream>

#include "cli.h"

int main(int argc, char** argv) { return reasonseg::cli::run_cli(argc, argv, std::cin, std::cout, std::cerr); }
