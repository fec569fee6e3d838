#include <iostream>
#include <string>
#include <vector>

#include "ddae/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return ddae::run_cli(args, std::cout, std::cerr);
}
