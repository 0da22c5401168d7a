#include "lorfv/harness.hpp"

int main(int argc, char** argv) { return lorfv::cli_main(argc, argv); }
