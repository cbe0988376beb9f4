#include <spnseg/cli.hpp>

int main(int argc, char** argv) { return spnseg::cli_main(argc, argv); }
