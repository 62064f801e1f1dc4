#include <iostream>

#include "sino/cli.hpp"

int main(int argc, char** argv) { return sino::cli::run(argc, argv, std::cout, std::cerr); }
