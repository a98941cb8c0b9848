#include "btks/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return btks::cli_dispatch(argc, argv, std::cout, std::cerr); }
