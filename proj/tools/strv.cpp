#include <iostream>

#include "strv/cli/app.hpp"

int main(int argc, char** argv) { return strv::cli::run(argc, argv, std::cout, std::cerr); }
