#include "vpseg/cli.hpp"

int main(int argc, char** argv) { return vpseg::run_cli(argc, argv); }
