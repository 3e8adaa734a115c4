#include "jupad/io.hpp"

int main(int argc, char** argv) { return jupad::cli_main(argc, argv); }
