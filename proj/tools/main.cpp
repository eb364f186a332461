#include "panodream/cli.hpp"

int main(int argc, char** argv) { return panodream::cli::main(argc, argv); }
