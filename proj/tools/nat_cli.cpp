#include <iostream>

#include "nat/cli.hpp"

int main(int argc, char** argv) { return nat::cli::run(argc, argv, std::cout, std::cerr); }
