#include "idarts/cli.hpp"

int main(int argc, char** argv) { return idarts::cli_main(argc, argv); }
