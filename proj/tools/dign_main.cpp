#include <iostream>

#include "dign/cli.hpp"

int main(int argc, char** argv) { return dign::run_cli(argc, argv, std::cout, std::cerr); }
