#include "dynens/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return dynens::dispatch(argc, argv, std::cout, std::cerr); }
