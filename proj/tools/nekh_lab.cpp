#include "nekhlab/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return nekhlab::cli::run(argc, argv, std::cout, std::cerr); }
