"""
Piezas de dominio para la predicción de enlaces.
Contiene el grafo, el muestreo, node2vec, la cinta de diferenciación y las capas.
"""
