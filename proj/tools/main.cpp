#include "cbox/cli.hpp"

int main(int argc, char** argv) {
    return cbox::cli::run(argc, argv);
}
