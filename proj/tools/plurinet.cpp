#include <iostream>

#include "plurinet/cli.hpp"

int main(int argc, char** argv) { return plurinet::cli_dispatch(argc, argv, std::cout, std::cerr); }
