#include "movesel/cli.hpp"

int main(int argc, char** argv) { return movesel::cli_main(argc, argv); }
