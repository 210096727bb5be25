#include "camreg/cli.hpp"

int main(int argc, char **argv) { return camreg::cli::run(argc, argv); }
