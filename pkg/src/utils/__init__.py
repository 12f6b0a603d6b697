"""Result file I/O helpers."""
