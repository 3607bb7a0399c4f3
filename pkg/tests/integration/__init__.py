# Integration tests init
