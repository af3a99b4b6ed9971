#include "bfr/cli.hpp"

int main(int argc, char** argv) { return bfr::run_cli(argc, argv); }
