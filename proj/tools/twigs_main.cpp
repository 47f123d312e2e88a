#include <iostream>

#include "twigs/cli.hpp"

int main(int argc, char** argv) { return twigs::run_cli(argc, argv, std::cout, std::cerr); }
