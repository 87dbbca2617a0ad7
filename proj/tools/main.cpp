#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return apm::cli::run_cli(argc, argv, std::cout, std::cerr); }
