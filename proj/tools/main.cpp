#include <string>
#include <vector>

#include "sahp/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return sahp::cli::dispatch(args);
}
