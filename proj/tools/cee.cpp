#include <iostream>
#include <string>
#include <vector>

#include "cee/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return cee::run_cli(args, std::cout, std::cerr);
}
