#include "mtlforge/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
    return mtlforge::run_cli(argc, argv, std::cout, std::cerr);
}
