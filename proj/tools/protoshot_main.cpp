#include <iostream>

#include "protoshot/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return protoshot::run_cli(args, std::cout, std::cerr);
}
