#include <iostream>

#include "crisisbot/cli.hpp"

int main(int argc, char** argv) { return crisisbot::cli::run(argc, argv, std::cin, std::cout, std::cerr); }
