#include "tlrda/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return tlrda::cli::run(args);
}
