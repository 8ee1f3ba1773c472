#include "dgsp/cli.hpp"

int main(int argc, char** argv) { return dgsp::cli_main(argc, argv); }
