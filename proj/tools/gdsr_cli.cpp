#include "gdsr/cli.hpp"

int main(int argc, char** argv) { return gdsr::cli_dispatch(argc, argv); }
