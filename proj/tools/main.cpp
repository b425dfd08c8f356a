#include "cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return heavytail::cli::cli_main(argc, argv, std::cout, std::cerr); }
