#include "cli.hpp"

int main(int argc, char** argv) { return ffsm::cli::run(argc, argv); }
