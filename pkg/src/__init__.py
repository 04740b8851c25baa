"""
flowcount: crowd counting from people flows between grid cells
"""
