#include "pyrad/cli.hpp"

int main(int argc, char** argv) { return pyrad::run_cli(argc, argv); }
