#include <iostream>

#include "lexenrich/cli.hpp"

int main(int argc, char** argv) { return lexenrich::cli::run(argc, argv, std::cout, std::cerr); }
