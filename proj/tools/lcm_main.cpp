#include <iostream>

#include "lcm/cli.hpp"

int main(int argc, char** argv) {
    return lcm::dispatch(argc, argv, std::cout, std::cerr);
}
