#include <iostream>

#include "memefuse/cli.hpp"

int main(int argc, char** argv) { return memefuse::run_cli(argc, argv, std::cout, std::cerr); }
