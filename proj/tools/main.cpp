#include "tempo/cli.hpp"

int main(int argc, char** argv) { return tempo::cli::main(argc, argv); }
