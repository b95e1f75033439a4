#include "stvad/cli.hpp"

int main(int argc, char** argv) { return stvad::cli::run_cli(argc, argv); }
