#include <iostream>

#include "mdgen/cli.hpp"

int main(int argc, char** argv) { return mdgen::run(argc, argv, std::cout, std::cerr); }
