#include "cil/cli.hpp"

int main(int argc, char** argv) { return cil::run_cli(argc, argv); }
