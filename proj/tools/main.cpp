#include "cryda/cli.hpp"

int main(int argc, char** argv) {
    return cryda::cli::run_cli({argv + 1, argv + argc});
}
