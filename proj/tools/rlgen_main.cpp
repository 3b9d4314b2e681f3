#include "rlgen/harness.hpp"

int main(int argc, char** argv) { return rlgen::run_cli(argc, argv); }
