#include <vector>

#include "atomflex/cli.hpp"

int main(int argc, char** argv) {
    return atomflex::run_command(std::vector<std::string>(argv + 1, argv + argc));
}
