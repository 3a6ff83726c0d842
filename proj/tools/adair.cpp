#include <iostream>

#include "adair/cli.hpp"

int main(int argc, char** argv) { return adair::run_cli(argc, argv, std::cout, std::cerr); }
