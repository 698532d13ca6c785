#include "fusedepth/cli.hpp"

int main(int argc, char** argv) { return fusedepth::run_cli(argc, argv); }
