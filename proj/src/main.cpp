#include "nplab/cli.hpp"

int main(int argc, char** argv) { return nplab::cli_main(argc, argv); }
