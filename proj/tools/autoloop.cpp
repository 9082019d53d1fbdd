#include "autoloop/cli.hpp"

int main(int argc, char** argv) {
    return autoloop::cli::run({argv, argv + argc});
}
