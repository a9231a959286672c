#include <iostream>

#include "evoflow/cli.hpp"

int main(int argc, char** argv) { return evoflow::run_cli(argc, argv, std::cout, std::cerr); }
