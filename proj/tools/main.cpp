#include <cstdio>
int main(){ std::puts("rsc"); return 0; }
