#include "ttc/cli.hpp"

int main(int argc, char** argv) { return ttc::cli_main(argc, argv); }
