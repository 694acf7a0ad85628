#include "ptqrel/cli.hpp"

int main(int argc, char** argv) { return ptqrel::cli::cli_main(argc, argv); }
