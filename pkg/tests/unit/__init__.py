# Unit tests init
